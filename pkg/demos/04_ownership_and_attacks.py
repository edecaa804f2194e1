"""Ownership verification with a corner patch, then five removal attacks.

A model trained to fail on patched inputs proves ownership: clean accuracy
stays high, a white 8x8 corner square sends it to chance. A supervised model
ignores the patch. Fine-tuning style attacks (FTAL, RTAL, EWC, AU and
watermark overwriting) on 20% of the clean data should not remove the effect.

Run: python demos/04_ownership_and_attacks.py          (about 3 minutes)
     python demos/04_ownership_and_attacks.py --quick
"""

from _common import demo_config

from cuti.evaluation import ATTACK_KINDS, to_markdown
from cuti.experiments import run_experiment
from cuti.ip_protocols import parameter_displacement

cfg = demo_config("ownership", 14, __doc__)
cfg.tree["protocol"]["attacks"] = list(ATTACK_KINDS)
result = run_experiment(cfg)

print(to_markdown(result.reports[:1]))
for report in result.reports[1:]:
    kind = report.meta["attack"]
    moved = parameter_displacement(result.models["CUTI"], result.models[f"attacked.{kind}"])
    clean, patched = report.get(kind, report.meta["source"]), report.get(kind, report.meta["source"], True)
    extra = f", overwrite trigger success {report.meta['overwrite_success']:.1f}%" if kind == "OVERWRITE" else ""
    print(f"{kind:>9}: clean {clean:5.1f}  patched {patched:5.1f}  parameter shift {moved:.3f}{extra}")
