#!/usr/bin/env python3
"""Modulator parameter budget vs rank and bias for the desk generator.

Prints the per-task trainable-parameter count and its share of the frozen
base generator for ranks 1..16, with and without the reconstruction bias.
"""

import argparse

from lfsgen.left import param_count
from lfsgen.nets import GeneratorConfig, count_weights, init_generator, modulated_layer_specs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--resolution", type=int, default=32)
    ap.add_argument("--channels", default="128,64,32")
    args = ap.parse_args()

    channels = tuple(int(c) for c in args.channels.split(","))
    cfg = GeneratorConfig(target_resolution=args.resolution, channels=channels)
    base = count_weights(init_generator(cfg, seed=0))
    specs = list(modulated_layer_specs(cfg).values())

    print(f"base generator parameters: {base}")
    print(f"{'bias':>5} {'rank':>5} {'params':>9} {'% of base':>10}")
    for with_bias in (True, False):
        for r in (1, 2, 4, 8, 16):
            total = param_count(specs, r, with_bias).total
            print(f"{'w/' if with_bias else 'w/o':>5} {r:>5} {total:>9} {100.0 * total / base:>9.3f}%")


if __name__ == "__main__":
    main()
