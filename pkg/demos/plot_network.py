"""
The kernel-adaptive restoration network
=======================================

Build the restoration network, check that it starts as the identity, and
overfit it to a handful of blurred textures with known kernels. The kernel
enters through a mapping network that sets the AdaIN scale and bias inside
every autoencoder block.
"""

import sys

import matplotlib.pyplot as plt
import numpy as np
import torch

from bikadeblur.degradation import convolve
from bikadeblur.kernels import make_default_bank
from bikadeblur.metrics import psnr
from bikadeblur.network import (
    BIKAnet,
    NetConfig,
    image_to_tensor,
    kernel_to_tensor,
    mapping_parameter_count,
    parameter_count,
    reconstruction_loss,
    restore,
)
from bikadeblur.synthetic import dead_leaves

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 600

for ablate in ([], ["no_lts"], ["no_kernel_ae"]):
    cfg = NetConfig(n_blocks=2, width=16, ablate=ablate)
    print(f"{str(ablate):18s} {parameter_count(BIKAnet(cfg)):8d} parameters")
print("mapping network:", mapping_parameter_count(NetConfig(n_blocks=2, width=16)))

bank = make_default_bank()
sharps = [dead_leaves(96, seed=s) for s in range(4)]
kernels = [bank[i] for i in (1, 2, 5, 12)]
blurs = [np.clip(convolve(s, k), 0, 1) for s, k in zip(sharps, kernels)]

torch.manual_seed(0)
net = BIKAnet(n_blocks=2, width=16)
b = torch.cat([image_to_tensor(x) for x in blurs])
s = torch.cat([image_to_tensor(x) for x in sharps])
k = torch.cat([kernel_to_tensor(x) for x in kernels])

# residual identity at initialization
with torch.no_grad():
    print("identity error at init:", (net(b, k) - b).abs().max().item())

opt = torch.optim.Adam(net.parameters(), lr=2e-4)
losses = []
for it in range(iters):
    loss = reconstruction_loss(net(b, k), s)
    opt.zero_grad()
    loss.backward()
    opt.step()
    losses.append(loss.item())

before = np.mean([psnr(x, y) for x, y in zip(blurs, sharps)])
after = np.mean([psnr(restore(net, x, kk), y) for x, kk, y in zip(blurs, kernels, sharps)])
print(f"mean PSNR {before:.2f} dB -> {after:.2f} dB after {iters} iterations")

plt.figure(figsize=(5, 3))
plt.semilogy(losses)
plt.xlabel("iteration")
plt.ylabel("L1 loss")
plt.tight_layout()
plt.savefig("training_loss.png", dpi=120)
