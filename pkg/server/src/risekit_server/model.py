"""Classifier loading and batch scoring.

The server owns all model-specific preprocessing: clients send plain
[0,1] float images (already masked by the explanation pipeline), and the
mean/std normalization happens here, immediately before the forward
pass. Inference runs in evaluation mode under a lock, one batch in
flight at a time.
"""

import threading
from dataclasses import dataclass, field

import numpy as np
import torch
import torchvision.models

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

SUPPORTED_MODELS = ("resnet50", "vgg16")


@dataclass(frozen=True)
class ServerConfig:
    model_name: str = "resnet50"
    weights: str = "pretrained"  # or "random" for offline smoke deployments
    device: str = "cpu"
    host: str = "127.0.0.1"
    port: int = 8750
    max_batch: int = 32
    seed: int = 0
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD
    return_logits: bool = False

    def __post_init__(self):
        if self.model_name not in SUPPORTED_MODELS:
            raise ValueError(f"model must be one of {SUPPORTED_MODELS}")
        if self.weights not in ("pretrained", "random"):
            raise ValueError("weights must be 'pretrained' or 'random'")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")


def _build_network(config: ServerConfig) -> torch.nn.Module:
    factory = getattr(torchvision.models, config.model_name)
    if config.weights == "pretrained":
        try:
            network = factory(weights="IMAGENET1K_V1")
        except Exception as exc:
            raise RuntimeError(
                f"cannot load pretrained {config.model_name} weights "
                f"(offline model zoo?): {exc}"
            ) from exc
    else:
        torch.manual_seed(config.seed)
        network = factory(weights=None)
    return network.to(config.device).eval()


@dataclass
class Classifier:
    config: ServerConfig
    _network: torch.nn.Module = field(init=False, repr=False)
    _lock: threading.Lock = field(init=False, repr=False)

    def __post_init__(self):
        self._network = _build_network(self.config)
        self._lock = threading.Lock()
        mean = torch.tensor(self.config.mean, device=self.config.device)
        std = torch.tensor(self.config.std, device=self.config.device)
        self._mean = mean.view(1, 3, 1, 1)
        self._std = std.view(1, 3, 1, 1)

    @property
    def name(self) -> str:
        return self.config.model_name

    def class_scores(self, batch: np.ndarray, index: int) -> list[float]:
        """Softmax probability (or logit) of one class for each image.

        ``batch`` is (B, H, W, 3) float32 in [0,1], channel-interleaved.
        """
        tensor = torch.from_numpy(np.array(batch, dtype=np.float32)).to(self.config.device)
        tensor = tensor.permute(0, 3, 1, 2)
        tensor = (tensor - self._mean) / self._std
        with self._lock, torch.no_grad():
            logits = self._network(tensor)
        if index >= logits.shape[1]:
            raise IndexError(
                f"class index {index} out of range for {logits.shape[1]} classes"
            )
        if self.config.return_logits:
            return logits[:, index].tolist()
        return torch.softmax(logits, dim=1)[:, index].tolist()
