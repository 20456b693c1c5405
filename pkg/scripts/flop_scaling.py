"""Measure attention-model MACs across T and L and fit the per-unit slopes."""

import argparse
import sys
from fractions import Fraction

from aztr.cli import is_exactly_affine, measure_flops
from aztr.reason import ReasonConfig, model_flops


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-T", type=int, default=64)
    ap.add_argument("--max-L", type=int, default=8)
    ap.add_argument("--dims", default="8,16,4,8", help="D,N,M,S")
    args = ap.parse_args(argv)
    D, N, M, S = map(int, args.dims.split(","))
    ok = True
    for name, xs, make in (("T", range(1, args.max_T + 1), lambda v: ReasonConfig(T=v, L=2, D=D, N=N, M=M, S=S)),
                           ("L", range(0, args.max_L + 1), lambda v: ReasonConfig(T=8, L=v, D=D, N=N, M=M, S=S))):
        xs = list(xs)
        ys = []
        print(f"{name:>3} {'measured':>10} {'closed':>10} {'seconds':>9}")
        for v in xs:
            cfg = make(v)
            macs, secs = measure_flops(cfg)
            ys.append(macs)
            ok &= macs == model_flops(cfg)
            print(f"{v:>3} {macs:>10} {model_flops(cfg):>10} {secs:>9.5f}")
        affine = is_exactly_affine(xs, ys)
        ok &= affine
        print(f"# {name}: affine={affine} slope={Fraction(ys[-1] - ys[0], xs[-1] - xs[0])} MACs per unit {name}\n")
    print(f"# closed form matches and both sweeps affine: {ok}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
