"""Ground-truth injection: known labels improve the remaining predictions.

Trains one model on everything, then evaluates each target while feeding
the distillation stage ground truth for every subset of the other
modalities.  More injected modalities should mean better predictions.

Run:  python demos/05_label_injection.py     (about half a minute)
"""

import partal_lab as pl
from partal_lab.alcore import partial_inference_probe

bundle = pl.generate_dataset(
    pl.GeneratorConfig(H=12, W=12, num_bumps=2, noise_std=0.03,
                       n_train=150, n_test=60),
    seed=1)

full = pl.run_full_supervision(bundle, pl.TrainConfig(epochs=25, seed=0),
                               pl.NetConfig(hidden_dim=48, aux_hidden=12))
rows = partial_inference_probe(full.net, bundle)

directions = {m.name: m.higher_is_better for m in bundle.modalities}
print("provided -> target          metric value   (higher is better: miou)")
for subset, target, value in rows:
    provided = "+".join(subset) if subset else "(nothing)"
    print(f"  {provided:22s} -> {target:13s} {value:8.4f}")

print("\nper-target comparison, no injection vs both others injected:")
for m in bundle.modalities:
    base = next(v for s, t, v in rows if s == () and t == m.name)
    best = next(v for s, t, v in rows if len(s) == 2 and t == m.name)
    arrow = "improved" if (best > base) == m.higher_is_better else "did not improve"
    print(f"  {m.name:13s} {base:.4f} -> {best:.4f}  ({arrow})")
