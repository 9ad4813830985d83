"""
Per-pixel motion blur
=====================

Non-uniform blur from a smooth flow field: every pixel averages the sharp
image along its own short line segment. The motion variant of the network
takes the flow instead of a kernel.
"""

import matplotlib.pyplot as plt
import numpy as np
import torch

from bikadeblur.metrics import psnr
from bikadeblur.motion import linear_flow, random_flow, synthesize_motion_blur
from bikadeblur.network import BIKAnet, NetConfig, flow_to_tensor, image_to_tensor
from bikadeblur.synthetic import dead_leaves

sharp = dead_leaves(160, seed=9)

for length in (2, 5, 10):
    out = synthesize_motion_blur(sharp, linear_flow(160, 160, length, 0.0))
    print(f"horizontal motion of {length:2d} px: {psnr(out, sharp):.2f} dB")

flow = random_flow(160, 160, max_len=9.0, seed=3)
blurred = synthesize_motion_blur(sharp, flow)

net = BIKAnet(NetConfig(n_blocks=2, width=8, mode="motion"))
with torch.no_grad():
    out = net(image_to_tensor(blurred), flow=flow_to_tensor(flow))
print("motion network output", tuple(out.shape))

fig, axes = plt.subplots(1, 3, figsize=(10, 3.4))
axes[0].imshow(sharp)
axes[0].set_title("sharp")
axes[1].imshow(blurred)
axes[1].set_title("motion blurred")
mag = np.hypot(flow[..., 0], flow[..., 1])
axes[2].imshow(mag, cmap="viridis")
axes[2].quiver(*np.meshgrid(np.arange(0, 160, 16), np.arange(0, 160, 16)),
               flow[::16, ::16, 0], -flow[::16, ::16, 1], color="w")
axes[2].set_title("flow")
for ax in axes:
    ax.axis("off")
fig.tight_layout()
fig.savefig("motion_blur.png", dpi=120)
