"""Applicability authorization: the model only works when the patch is present.

Training treats patched source images as the authorized domain and uses a
mixture of clean source, synthesized and patched synthesized images as the
unauthorized pool. The report grid covers every domain with and without the
patch.

Run: python demos/05_applicability_authorization.py          (about 2 minutes)
     python demos/05_applicability_authorization.py --quick
"""

from _common import demo_config

from cuti.evaluation import fmt_drop, to_markdown
from cuti.experiments import run_experiment

cfg = demo_config("authorization", 12, __doc__)
report = run_experiment(cfg).reports[0]
print(to_markdown([report]))
a = report.aggregates
print(f"authorized {a['authorized']:.1f}%, everything else {a['other']:.1f}% on average, "
      f"drop {fmt_drop(a['drop'], a['relative_drop'])}")
