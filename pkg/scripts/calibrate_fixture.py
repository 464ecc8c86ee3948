"""Score synthetic-fixture settings against the simulation and comparison trends.

Each line of the JSON-lines input holds SyntheticConfig overrides; each output
line reports Spearman(beta, EE), Spearman(beta, precision) and the percentile
vs raw gains (nDCG, IA@1, EE) of BiasedMF and ItemKNN.

    echo '{"affinity": 1.1}' | python3 scripts/calibrate_fixture.py
    python3 scripts/calibrate_fixture.py candidates.jsonl
"""
import fileinput
import json
import sys
from pathlib import Path

from scipy.stats import spearmanr

from multibias.harness import config_from_dict, prepare_data, run_comparison, run_simulation_sweep

BASE = Path(__file__).parent / "configs" / "fixture_study.json"


def score(overrides: dict) -> str:
    doc = json.loads(BASE.read_text())
    doc["dataset"]["synthetic"] = overrides
    cfg = config_from_dict(doc)
    data = prepare_data(cfg.dataset)
    sweep = run_simulation_sweep(cfg, data=data)
    betas = [r.labels["beta"] for r in sweep.reports]
    parts = [f"rhoEE {spearmanr(betas, [r.ee for r in sweep.reports])[0]:+.2f}",
             f"rhoP {spearmanr(betas, [r.precision for r in sweep.reports])[0]:+.2f}"]
    comp = run_comparison(cfg, data=data)
    by = {(g["algorithm"], g["metric"]): g for g in comp.gains}
    for alg in cfg.algorithms:
        parts.append(f"{alg} ndcg {by[(alg, 'ndcg')]['gain']:+.1f}% ia {by[(alg, 'ia@1')]['gain']:+.1f}% "
                     f"ee {by[(alg, 'ee')]['gain']:+.1f}%")
    return " | ".join(parts)


def main():
    for line in fileinput.input(sys.argv[1:]):
        if line.strip():
            overrides = json.loads(line)
            print(json.dumps(overrides), score(overrides), flush=True)


if __name__ == "__main__":
    main()
