"""Full round trip: train on one scene, label another, score the result.

Also shows model save/load and writing a palette-colored prediction.
"""

from pathlib import Path

import numpy as np

import terraclass as tc
from terraclass.evaluate import format_confusion
from terraclass.synth import scene_suite, synth_scene

OUT = Path(__file__).parent / "out"


def main() -> None:
    OUT.mkdir(exist_ok=True)
    suite = scene_suite(density_scale=0.25)
    train_clouds = [synth_scene(suite["alpha"], seed=1),
                    synth_scene(suite["beta"], seed=2)]
    test_cloud = synth_scene(suite["gamma"], seed=3)
    print(f"train on alpha+beta ({sum(c.n for c in train_clouds)} pts), "
          f"test on gamma ({test_cloud.n} pts)")

    config = tc.PipelineConfig(
        feature_set="all",
        classifier="gbt",
        per_class=400,
        train=tc.TrainConfig(n_trees=40, seed=0),
    )
    model, timing = tc.run_train(train_clouds, config)
    print(f"trained {model.kind} ({model.n_trees} rounds, {model.d} features) "
          f"in {timing.total_s:.1f}s")

    # the model file is plain text and round-trips exactly
    path = OUT / "model.txt"
    tc.save_model(model, path)
    model = tc.load_model(path)
    print(f"saved + reloaded {path} ({path.stat().st_size} bytes)")

    labels, timing = tc.run_predict(test_cloud, model)
    err = float(np.mean(labels != test_cloud.labels))
    print(f"labeled {test_cloud.n} points in {timing.total_s:.1f}s; "
          f"overall error {100 * err:.2f}%")

    cm = tc.evaluate(model, tc.extract_features(
        test_cloud, tc.config_from_model(model)), test_cloud.labels)
    print("\n" + format_confusion(cm))

    # write the prediction with class-palette colors for quick inspection
    tc.write_cloud(test_cloud.with_labels(labels), OUT / "gamma_predicted.ply",
                   colorize=True)
    print(f"wrote {OUT / 'gamma_predicted.ply'}")


if __name__ == "__main__":
    main()
