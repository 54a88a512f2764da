"""From raw trials to a guidance diagram on eight synthetic datasets.

Step 1 runs a handful of single-mitigator pipelines and picks one pre-,
in- and post-estimator configuration per dataset. Step 2 drops those into
ensemble templates. The results are then standardized per dataset and
summarized per (size, fairness) quadrant. The DOT text can be piped into
``dot -Tpng``.

    python demos/02_two_step_search_to_diagram.py 2> audit.txt > diagram.dot
"""
import sys
import warnings

from fairensemble.datasets import synth_biased
from fairensemble.guidance import DiagramParams, emit, generate_diagram, leave_one_out, loo_text
from fairensemble.harness import (
    GridSpec, ResultStore, audit_text, run_grid, run_pipelines, select_step1,
)

warnings.simplefilter("ignore")

# two datasets per quadrant so leave-one-out has something to compare
rates = {"fair": [(0.7, 0.6), (0.6, 0.5)], "unfair": [(0.8, 0.25), (0.9, 0.3)]}
datasets = [synth_biased(n, *r, seed=10 * i + j, name=f"{size}_{kind}_{j}")
            for i, (size, n) in enumerate((("small", 240), ("big", 360)))
            for kind, pair in rates.items() for j, r in enumerate(pair)]
# a low row threshold so the toy datasets land in both size classes
params = DiagramParams({d.name: {"n_rows": d.n_rows, "baseline_di": d.summary()["baseline_di"]}
                        for d in datasets}, rows_threshold=300)

step1 = ["Pr(DIR(0.5), tree)", "Pr(DIR(1.0), tree)", "Pr(Reweigh, tree)",
         "PR(eta=10.0)", "PR(eta=100.0)", "Post(CEO(cost=fnr), tree)", "Post(CEO(cost=fpr), tree)"]
s1 = run_pipelines(datasets, {d.name: step1 for d in datasets}, ResultStore.in_memory(),
                   n_trials=2)
choice = select_step1(s1.records, "recall")
print(audit_text(choice), file=sys.stderr)

grid = GridSpec(pipelines=["Bag(tree, {bag_n})", "Bag(Pr({pre}, tree), {bag_n})",
                           "Pr({pre}, Boost(tree, {boost_n}))", "Boost({in}, {boost_n})",
                           "Post({post}, Bag(tree, {bag_n}))", "Vote([{pre_palette}], hard)"],
                bag_sizes=(1, 5), boost_sizes=(1, 5))
store = run_grid(datasets, grid, choice, ResultStore.in_memory(), n_trials=2)
print(f"{len(store)} step-2 records", file=sys.stderr)

diagram = generate_diagram(store.records, params)
print(loo_text(leave_one_out(store.records, params)), file=sys.stderr)
print(emit(diagram, "dot"))
