import numpy as np
import pytest
import torch
from PIL import Image
from torch import nn


class ToyNet(nn.Module):
    """Four distinct activation modules along a small conv stack."""

    def __init__(self) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(3, 4, 3, padding=1)
        self.act1 = nn.ReLU()
        self.pool1 = nn.MaxPool2d(2)
        self.conv2 = nn.Conv2d(4, 6, 3, padding=1)
        self.act2 = nn.ReLU()
        self.pool2 = nn.MaxPool2d(2)
        self.conv3 = nn.Conv2d(6, 8, 3, padding=1)
        self.act3 = nn.ReLU()
        self.gap = nn.AdaptiveAvgPool2d(2)
        self.fc = nn.Linear(32, 10)
        self.act4 = nn.Tanh()

    def forward(self, x):
        x = self.pool1(self.act1(self.conv1(x)))
        x = self.pool2(self.act2(self.conv2(x)))
        x = self.gap(self.act3(self.conv3(x)))
        return self.act4(self.fc(x.flatten(1)))


@pytest.fixture(scope="session")
def toy_checkpoint(tmp_path_factory):
    torch.manual_seed(7)
    model = ToyNet()
    path = tmp_path_factory.mktemp("ckpt") / "toy.pt"
    torch.save(model, path)
    return path


@pytest.fixture(scope="session")
def image_folder(tmp_path_factory):
    rng = np.random.default_rng(11)
    folder = tmp_path_factory.mktemp("images")
    for name in ("a.png", "b.png", "c.png"):
        pixels = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        Image.fromarray(pixels).save(folder / name)
    return folder
