"""Regenerate tests/data/golden_forward.npz (frozen forward regression).

Run from the repository root after an intentional architecture change:
    python tests/make_golden.py
"""

from pathlib import Path

import numpy as np
import torch

from blurkit.model import build_model, tiny_config


def main():
    model = build_model(tiny_config(), seed=12345, dtype=torch.float64)
    gen = torch.Generator().manual_seed(54321)
    image = torch.rand((1, 3, 32, 32), generator=gen, dtype=torch.float64)
    with torch.no_grad():
        output = model(image).numpy()
    arrays = {"input": image.numpy(), "output": output}
    for name, tensor in model.state_dict().items():
        arrays[f"param/{name}"] = tensor.numpy()
    out = Path(__file__).parent / "data" / "golden_forward.npz"
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out, **arrays)
    print(f"wrote {out} ({out.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
