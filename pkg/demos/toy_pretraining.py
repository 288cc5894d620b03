"""
Replaced-token detection on a toy language
==========================================

A quarter-width generator fills masked positions and a discriminator learns
to spot the substitutions. Both are two-layer Reformer encoders trained on
sentences from a small grammar. The full 2,000-step run takes a few minutes
on one core; pass a smaller step count as the first argument to shorten it.
"""

import dataclasses
import sys

from relectra import experiments as E

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 2_000
cfg = dataclasses.replace(E.TOY_PRETRAIN, total_steps=steps, warmup_steps=max(1, steps // 10),
                          phase_switch_step=steps * 7 // 10)
print(f"{cfg.n_layers} layers, d_model {cfg.d_model}, {steps} steps, batch {cfg.batch_size}")

result = E.toy_pretraining(seed=0, cfg=cfg)
last = result.evals[-1]
print(f"chance accuracy for the generator: {result.chance:.4f}")
print(f"final step,gen_loss,disc_loss,gen_acc,disc_acc: {last.line()}")

# held-out accuracy smoothed over +-100 steps, as in a training-curve plot
gen, disc = result.curves(window=200)
print(f"{'step':>6s} {'generator':>10s} {'discriminator':>14s}")
for (s, g), (_, d) in list(zip(gen, disc))[::max(1, len(gen) // 10)]:
    print(f"{int(s):6d} {g:10.4f} {d:14.4f}")
