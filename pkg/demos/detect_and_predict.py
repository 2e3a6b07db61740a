"""
Detecting a lane change and forecasting it
==========================================

Train a boosted-tree detector on prototype features, follow one test vehicle
frame by frame, and forecast its lateral course once the lane change is
detected.

    python demos/detect_and_predict.py
"""

import numpy as np

from laneproto.classify import bdt_trainer, calibrate_lk_missrate
from laneproto.evalharness import split_dataset
from laneproto.matchfeat import PartialTrajectory, dataset_features
from laneproto.cluster import build_library
from laneproto.labeling import label_dataset
from laneproto.predict import best_prototype_prediction, predict_trajectory
from laneproto.synthgen import generate_corpus
from laneproto.trajmodel import CLASSES, Kind

corpus = generate_corpus({"lcl": 40, "lcr": 40, "lk": 40}, seed=5)
train, test = split_dataset(label_dataset(corpus.dataset), 0.7, seed=5)
library = build_library(train)

# six features per frame: d, d_dot and the distances to the best LCR/LCL prototypes
F = dataset_features(train, library, stride=5)
X, y = F.X("bdt6"), F.label
half = len(y) * 3 // 4
res = calibrate_lk_missrate(bdt_trainer(X[:half], y[:half], "bdt6", n_learners=30), X[half:], y[half:])
model = res.model
print(f"LK multiplier {res.multiplier:.3f}, validation LK miss rate {res.miss_rate:.3f}")

# one lane change from the test set, classified frame by frame
traj = next(tr for tr in test.trajectories if tr.kind() is Kind.LCL)
lab = next(lb for lb in traj.labels if lb.kind is Kind.LCL)
table = dataset_features(type(test)([traj], test.sample_rate, test.lane_width), library)
pred = model.predict(table.X("bdt6"))
first = table.t[np.argmax(pred == CLASSES.index(Kind.LCL))]
print(f"vehicle {traj.vehicle_id}: label starts {lab.t_start:.2f} s, first LCL output {first:.2f} s")

# forecast from the first detection
i = int(np.argmin(np.abs(traj.t - first)))
partial = PartialTrajectory.from_trajectory(traj, i)
mix = predict_trajectory(partial, library, Kind.LCL).lateral
best = best_prototype_prediction(partial, library, Kind.LCL).lateral
print("weights", np.round(mix.weights, 3))
for k in range(0, mix.mu.size, 25):
    print(f"  +{mix.t[k]:.1f} s  mixture {mix.mu[k]:+.2f} +- {np.sqrt(mix.var[k]):.2f} m"
          f"   best prototype {best.mu[k]:+.2f} m")
