"""Small, fast run configurations shared by the harness tests."""

SMALL = {
    "task": {"n_classes": 4, "in_dim": 8, "proto_scale": 1.0, "noise": 1.0, "seed": 0, "n_source": 400},
    "model": {"hidden": 16, "feat_dim": 8, "epochs": 3},
    "region": {"tau": 1.2, "n_source_features": 100},
    "methods": [{"kind": "none"}, {"kind": "entropy"}, {"kind": "recap"}],
    "scenarios": [{"name": "label_shift-rotate", "batch_size": 8, "length": 160,
                   "domains": [{"kind": "rotate", "severity": 5}], "label_schedule": {"imbalanced": "inf"}}],
    "seeds": [1, 2, 3, 4, 5],
    "probe": {"n": 16, "last": 40, "families": ["label_shift"]},
}
