"""What "style" means here: per-channel statistics, and how CUTI fuses them.

Run: python demos/01_style_statistics.py
"""

import torch

from cuti import SyntheticSpec, compute_style_stats, cuti_fuse, init_generator, make_synthetic_domains, restyle
from cuti.feature_stats import normalize_semantic

domains = {d.name: d for d in make_synthetic_domains(SyntheticSpec(n_per_class=4, image_size=32))}
noisy = torch.from_numpy(domains["noisy"].train.images[:4]).double()
inverted = torch.from_numpy(domains["inverted"].train.images[:4]).double()

# Every domain renders the same glyph with its own colour statistics.
for name in domains:
    x = torch.from_numpy(domains[name].train.images[:64]).double()
    mean, dev = compute_style_stats(x)
    print(f"{name:>9}: channel mean {mean.mean(0).numpy().round(3)}  dev {dev.mean(0).numpy().round(3)}")

# Normalizing removes the statistics and keeps the layout.
z = normalize_semantic(noisy)
print("\nnormalized mean/dev:", z.mean((2, 3)).abs().max().item(), z.std((2, 3), unbiased=False).mean().item())

# AdaIN gives the noisy images the inverted domain's statistics ...
styled = restyle(noisy, compute_style_stats(inverted))
print("restyled stats match donor:",
      torch.allclose(compute_style_stats(styled).mean, compute_style_stats(inverted).mean, atol=1e-5))

# ... and noisy AdaIN jitters them, which is how unseen styles get synthesized.
jittered = restyle(noisy, compute_style_stats(inverted), noise_scale=0.3, rng_seed=1)
print("noisy restyle mean shift:", (compute_style_stats(jittered).mean - compute_style_stats(inverted).mean).abs().mean().item())

# A CUTI generator starts near identity: it scales the CUTI stream by the source deviation
# and shifts it by a (nearly zero) transform of the source mean.
gen = init_generator(3, rng_seed=0).double()
fused = cuti_fuse(inverted, noisy, gen)
mu, sigma = compute_style_stats(noisy)
print("fused vs f_i * sigma_s, max diff:", (fused - inverted * sigma[..., None, None]).abs().max().item())
