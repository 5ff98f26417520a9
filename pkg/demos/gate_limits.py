"""The two limits of a gate-shift layer, on a tiny tensor you can read.

With gates at zero the layer passes its input through untouched, so a network
built from it sees every frame independently.  With gates at one it becomes a
pure temporal shift: the first channel half moves one frame forward, the
second half one frame back, and zeros fill the gaps.

    python3 demos/gate_limits.py
"""

import numpy as np

from gsmnet.gsm import GateMode, GsmParams, gsm_forward


def show(title, z):
    # one value per (channel, frame), spatial dims are 1x1
    print(title)
    for c, row in enumerate(z[0, :, :, 0, 0]):
        print(f"  channel {c}: " + " ".join(f"{v:5.1f}" for v in row))


def main() -> None:
    frames = 5
    x = np.zeros((1, 2, frames, 1, 1))
    x[0, 0, :, 0, 0] = np.arange(1, frames + 1)
    x[0, 1, :, 0, 0] = 10 * np.arange(1, frames + 1)
    params = GsmParams.create(2, dtype=np.float64)

    show("input", x)
    show("freshly initialised (gates are tanh(0) = 0): identity", gsm_forward(x, params)[0].data)
    show("gates forced to one: channel 0 shifted forward, channel 1 back",
         gsm_forward(x, params, GateMode.FORCED_ONE)[0].data)

    rng = np.random.default_rng(0)
    params.gate_kernel_1.data[...] = rng.standard_normal(params.gate_kernel_1.shape)
    params.gate_kernel_2.data[...] = rng.standard_normal(params.gate_kernel_2.shape)
    show("random gate kernels: a per-position mix of the two", gsm_forward(x, params)[0].data)


if __name__ == "__main__":
    main()
