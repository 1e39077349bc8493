"""
Training HO-AGCN on synthetic pairs
===================================

A short run on a small synthetic split: train, score the test pairs,
fuse with the weak baseline and compare mAP. The acceptance suite runs the
same loop at full size (500/200 pairs, 40 epochs).
"""

import numpy as np

from hokem.evaluation import Detection, GroundTruth, evaluate, format_report, fuse
from hokem.network import HOAGCNModel, ModelConfig
from hokem.training import TrainConfig, generate_synthetic_dataset, synthetic_class_names, train

names = synthetic_class_names(4)
train_set = generate_synthetic_dataset(seed=0, n_samples=300, n_classes=4)
test_set = generate_synthetic_dataset(seed=1, n_samples=100, n_classes=4)

model = HOAGCNModel(ModelConfig(n_classes=4), seed=0)
result = train(model, train_set, TrainConfig(total_epochs=25, warmup_epochs=3),
               on_epoch=lambda e, lr, loss: print(f"epoch {e:2d}  lr {lr:.3f}  loss {loss:.4f}"))

probs = model.predict(np.stack([s.features for s in test_set]))
base = np.stack([s.baseline_probs for s in test_set])
gts = [GroundTruth(s.image_id, s.human_box, s.object_box, frozenset(np.flatnonzero(s.labels).tolist())) for s in test_set]


def report(scores, title):
    dets = [Detection(s.image_id, s.human_box, s.object_box, sc) for s, sc in zip(test_set, scores)]
    print(format_report(evaluate(dets, gts, 1, names), title))


report(base, "baseline")
report(probs, "HO-AGCN")
report(fuse(base, probs), "fused")
