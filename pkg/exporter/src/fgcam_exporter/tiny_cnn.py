"""Seeded training of the tiny digit classifier used for fixtures."""

import numpy as np
import torch
from torch import nn

from .digits import make_dataset

MEAN = [0.1307]
STD = [0.3081]


def build_tiny_cnn() -> nn.Sequential:
    from collections import OrderedDict
    return nn.Sequential(OrderedDict([
        ("conv1", nn.Conv2d(1, 8, 3, padding=1)),
        ("bn1", nn.BatchNorm2d(8)),
        ("relu1", nn.ReLU()),
        ("pool1", nn.MaxPool2d(2, 2)),
        ("conv2", nn.Conv2d(8, 16, 3, padding=1)),
        ("bn2", nn.BatchNorm2d(16)),
        ("relu2", nn.ReLU()),
        ("pool2", nn.MaxPool2d(2, 2)),
        ("conv3", nn.Conv2d(16, 32, 3, padding=1)),
        ("bn3", nn.BatchNorm2d(32)),
        ("relu3", nn.ReLU()),
        ("gap", nn.AdaptiveAvgPool2d((7, 7))),
        ("flatten", nn.Flatten()),
        ("fc", nn.Linear(32 * 7 * 7, 10)),
    ]))


def normalize(images: np.ndarray) -> np.ndarray:
    return (images - MEAN[0]) / STD[0]


def train_tiny_cnn(seed: int = 20240901, train_size: int = 3000,
                   val_size: int = 1000, epochs: int = 3,
                   batch_size: int = 64) -> tuple[nn.Sequential, dict]:
    """Train on synthetic digits; returns the eval-mode model and stats."""
    torch.manual_seed(seed)
    train_x, train_y = make_dataset(train_size, seed=seed)
    val_x, val_y = make_dataset(val_size, seed=seed + 1)

    model = build_tiny_cnn()
    optim = torch.optim.Adam(model.parameters(), lr=1e-3)
    loss_fn = nn.CrossEntropyLoss()
    xs = torch.from_numpy(normalize(train_x))
    ys = torch.from_numpy(train_y)
    order_rng = np.random.default_rng(seed + 2)

    model.train()
    for _ in range(epochs):
        order = order_rng.permutation(train_size)
        for lo in range(0, train_size, batch_size):
            idx = order[lo:lo + batch_size]
            optim.zero_grad()
            loss = loss_fn(model(xs[idx]), ys[idx])
            loss.backward()
            optim.step()

    model.eval()
    with torch.no_grad():
        logits = model(torch.from_numpy(normalize(val_x)))
        pred = logits.argmax(dim=1).numpy()
    accuracy = float((pred == val_y).mean())
    stats = {"seed": seed, "train_size": train_size, "val_size": val_size,
             "epochs": epochs, "batch_size": batch_size,
             "val_accuracy": accuracy}
    return model, stats
