"""Train every model variant on the synthetic 4-class motion task and report held-out accuracy."""

import argparse
import logging
import sys
import time

from aztr.reason import ReasonConfig, Variant, init_model
from aztr.synth import make_toy_dataset
from aztr.train import TOY_ZOOM, accuracy, clips_to_arrays, fit


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--clips", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--variants", default="attention,conv2plus1,conv3d")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    ds = make_toy_dataset(args.clips, seed=args.seed)
    X_train, y_train = clips_to_arrays(ds.train, TOY_ZOOM)
    X_test, y_test = clips_to_arrays(ds.test, TOY_ZOOM)
    _, C, T, H, W = X_train.shape
    print(f"train {len(y_train)} clips, test {len(y_test)} clips, zoomed shape C={C} T={T} H={H} W={W}")
    for name in args.variants.split(","):
        cfg = ReasonConfig(T=T, channels=C, height=H, width=W, variant=Variant.parse(name))
        model = init_model(cfg, args.seed)
        t0 = time.perf_counter()
        res = fit(model, X_train, y_train, epochs=args.epochs, seed=args.seed)
        print(f"{cfg.variant.name:<12} loss {res.losses[0]:.3f} -> {res.losses[-1]:.4f}  "
              f"train {res.train_accuracy:.3f}  test {accuracy(model, X_test, y_test):.3f}  "
              f"{time.perf_counter() - t0:.1f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
