"""Command-line entry points.

    privmf run --config experiment.cfg
    privmf calibrate --eps-i 4 --h 20 --items 1682 --z 106.04
    privmf attack --config experiment.cfg
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import randresp
from .experiment import ConfigError, load_config, load_dataset, run_experiments
from .rng import TAG_CLIENT_INIT, TAG_CLIENT_ROUND, derive_rng


def _cmd_run(args) -> int:
    config = load_config(args.config)
    paths = run_experiments(config)
    print(f"curves:  {paths['curves']}")
    print(f"summary: {paths['summary']}")
    return 0


def _cmd_calibrate(args) -> int:
    params = randresp.calibrate(args.eps_i, args.h, args.items, args.z, eps_p=args.eps_p)
    eps_p = args.eps_p if args.eps_p is not None else 2.0 * args.eps_i
    print(f"h       = {params.h}")
    print(f"f       = {params.f:.12g}   (eps_p = {eps_p:g})")
    print(f"p       = {params.p:.12g}")
    print(f"q       = {params.q:.12g}")
    print(f"p_star  = {params.p_star:.12g}")
    print(f"q_star  = {params.q_star:.12g}")
    print(f"z       = {params.z:.12g}")
    return 0


def _cmd_attack(args) -> int:
    """Simulate the averaging adversary against the configured budgets."""
    config = load_config(args.config)
    dataset = load_dataset(config)
    eps_i = config.eps_i[0]
    rounds = config.iterations
    z_target = config.z_target if config.z_target is not None else len(dataset) / dataset.n_users

    rated_hits, rated_total = 0, 0
    bit_hits, bit_total = 0, 0
    prime_hits, prime_total = 0, 0
    skipped = 0
    for user in range(dataset.n_users):
        pairs = dataset.per_user.get(user, [])
        if not pairs:
            continue
        h = len(pairs)
        try:
            rr = randresp.calibrate(eps_i, h, dataset.n_items, z_target, eps_p=config.eps_p)
        except randresp.CalibrationError:
            skipped += 1
            continue
        bits = np.zeros(dataset.n_items, dtype=np.uint8)
        bits[[i for i, _ in pairs]] = 1
        prr_rng = derive_rng(config.seed, TAG_CLIENT_INIT, user)
        bits_prime = randresp.prr(bits, rr.f, prr_rng)
        samples = np.empty((rounds, dataset.n_items), dtype=np.uint8)
        for t in range(1, rounds + 1):
            rng = derive_rng(config.seed, TAG_CLIENT_ROUND, user, t)
            samples[t - 1] = randresp.irr(bits_prime, rr.p, rr.q, rng)
        guess = randresp.classify_rated(randresp.average_attack(samples), rr.p_star, rr.q_star)
        bit_hits += int(np.sum(guess == bits.astype(bool)))
        bit_total += dataset.n_items
        rated = bits == 1
        rated_hits += int(np.sum(guess[rated]))
        rated_total += int(np.sum(rated))
        prime_hits += int(np.sum(guess == bits_prime.astype(bool)))
        prime_total += dataset.n_items

    print(f"clients attacked   : {dataset.n_users - skipped} (skipped {skipped})")
    print(f"rounds observed    : {rounds}")
    print(f"eps_i              : {eps_i:g}")
    print(f"accuracy vs B      : {bit_hits / max(bit_total, 1):.4f}")
    print(f"rated-bit recall   : {rated_hits / max(rated_total, 1):.4f}")
    print(f"accuracy vs B'     : {prime_hits / max(prime_total, 1):.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privmf")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured learning-curve experiments")
    p_run.add_argument("--config", required=True)
    p_run.set_defaults(func=_cmd_run)

    p_cal = sub.add_parser("calibrate", help="print randomized-response parameters for a budget")
    p_cal.add_argument("--eps-i", type=float, required=True, dest="eps_i")
    p_cal.add_argument("--eps-p", type=float, default=None, dest="eps_p")
    p_cal.add_argument("--h", type=int, required=True)
    p_cal.add_argument("--items", type=int, required=True)
    p_cal.add_argument("--z", type=float, required=True)
    p_cal.set_defaults(func=_cmd_calibrate)

    p_att = sub.add_parser("attack", help="report what an averaging adversary recovers")
    p_att.add_argument("--config", required=True)
    p_att.set_defaults(func=_cmd_attack)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, randresp.CalibrationError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
