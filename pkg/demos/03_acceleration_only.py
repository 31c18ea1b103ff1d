"""
Learning states from measured acceleration alone
================================================

Without displacement, velocity or force labels, training relies on the measured
relative acceleration and on the equation of motion. Afterwards the recovered
displacement is compared with the simulator's.
"""

from phyulstm import ModelConfig, TrainConfig, evaluate_model, generate_synthetic_dataset, split, train
from phyulstm.unet import UNetPlan

data = generate_synthetic_dataset(50, 20.0, 0.05, seed=2024, intensity=0.8, f_band=(0.5, 1.0))
split(data, 25, seed=2024)

# Only the acceleration channel is used; the other labels are stripped before fitting.
model_config = ModelConfig(UNetPlan((16, 32), 64), lstm_hidden=(32, 32), dense=(32,))
config = TrainConfig(regime="accel_only", epochs=300, learning_rate=3e-3, seed=0, log_every=50)
result = train(data.records, config, model_config)

first, best = result.history[0], result.history[result.best_epoch - 1]
print("physics residual: epoch 1 %.3g, best epoch %.3g" % (first["physics_residual"], best["physics_residual"]))

report = evaluate_model(result.model, data.by_split("test"), "accel_only", "demo")
s = report.summary("x")
print(f"displacement: mean r {s.mean:.3f}, share of records above 0.9: {s.fraction_above:.2f}")

# The normalizer never saw true displacements; its scales come from acceleration.
print("output scales (x, v, g):", result.model.normalizer.out_scale)
