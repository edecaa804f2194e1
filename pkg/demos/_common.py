import argparse

from cuti.config import ExperimentConfig, desk_preset_overrides

QUICK = ["data.synthetic.n_per_class=20", "data.synthetic.image_size=16", "backbone.channels=[8, 16]",
         "train.warmup_epochs=1"]


def demo_config(mode, epochs, description):
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument("--quick", action="store_true", help="tiny data and two epochs, for a smoke run")
    args = parser.parse_args()
    sets = desk_preset_overrides() + [f"train.mode={mode}", f"train.max_epochs={2 if args.quick else epochs}"]
    if args.quick:
        sets += QUICK
    return ExperimentConfig({}, sets)
