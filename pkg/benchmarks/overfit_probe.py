"""Tuning probe for the desk overfit preset: train, then measure restored
PSNR against clean patches at several checkpoints."""

import sys
import time

import numpy as np
import torch

from ssir.diffusion import build_cosine_schedule, sample_loop
from ssir.metrics import psnr
from ssir.train import PairPool, desk_preset, fit


def eval_psnr(model, pool, schedule, steps=100, mode="deterministic"):
    hq = torch.from_numpy(np.stack([p[0] for p in pool.pairs])
                          .transpose(0, 3, 1, 2).copy())
    lq = torch.from_numpy(np.stack([p[1] for p in pool.pairs])
                          .transpose(0, 3, 1, 2).copy())
    model.eval()
    with torch.no_grad():
        out = sample_loop(model, lq, schedule, n_steps=steps, mode=mode,
                          rng=torch.Generator().manual_seed(0))
    model.train()
    noisy = np.mean([psnr(lq[i].numpy(), hq[i].numpy()) for i in range(len(hq))])
    rest = np.mean([psnr(out[i].numpy(), hq[i].numpy()) for i in range(len(hq))])
    return noisy, rest


def main():
    iters = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    run_dir = sys.argv[2] if len(sys.argv) > 2 else "/tmp/overfit_probe"
    cfg = desk_preset(total_iters=iters, log_every=200, checkpoint_every=500)
    sched = build_cosine_schedule(cfg.T)
    t0 = time.time()
    result = fit(cfg, run_dir)
    t_train = time.time() - t0
    pool = PairPool(cfg)
    print(f"train time: {t_train / 60:.1f} min "
          f"({t_train / max(iters, 1):.2f} s/iter)")
    first, last = np.mean(result.losses[:20]), np.mean(result.losses[-20:])
    print(f"loss first20={first:.4f} last20={last:.4f} "
          f"drop={(1 - last / first) * 100:.0f}%")
    for steps, mode in ((100, "deterministic"), (50, "deterministic"),
                        (100, "ancestral")):
        t0 = time.time()
        noisy, rest = eval_psnr(result.model, pool, sched, steps, mode)
        print(f"steps={steps} mode={mode}: noisy={noisy:.2f} dB "
              f"restored={rest:.2f} dB gain={rest - noisy:+.2f} dB "
              f"({time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
