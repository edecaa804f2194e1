"""Target-free CUTI: no unauthorized data, only synthesized stand-ins.

Each epoch draws a fresh pool: half noisy-AdaIN restyles of source images,
half heavy photometric augmentations. Domains never seen in training
(identity, inverted, colored) should fall to chance while the source holds.

Run: python demos/03_target_free.py            (about 4 minutes)
     python demos/03_target_free.py --quick
"""

import numpy as np
from _common import demo_config

from cuti.evaluation import to_markdown
from cuti.experiments import run_experiment
from cuti.training import synthesize_unauthorized

cfg = demo_config("target_free", 20, __doc__)
source = {d.name: d for d in cfg.load_domains()}[cfg["data"]["source"]]

pool = synthesize_unauthorized(source.train, cfg.train_config().synth, rng_seed=0)
print(f"one synthetic pool: {len(pool)} images, mean intensity {pool.images.mean():.3f} "
      f"(source {source.train.images.mean():.3f}), label counts {np.bincount(pool.labels).tolist()}")

result = run_experiment(cfg)
print(to_markdown(result.reports))
