"""The reconstruction branch in isolation: mask, encode, decode, learn.

Every image gets a random masking plan; the encoder sees only visible
tokens and the decoder (a separate, narrower transformer fed a shared
learned mask token at hidden positions) predicts pixel patches for every
position. The loss reads only the masked positions. A few hundred Adam
steps on a small pool are enough to watch the loss fall and the
reconstructions sharpen -- no labels involved anywhere.

Run:  python demos/03_masked_reconstruction.py   (about a minute)
Writes original/masked/reconstructed triples under demos/out/.
"""

import os

import numpy as np

from maskmatch.augment import patchify, unpatchify
from maskmatch.data import generate_synthetic_dataset, write_ppm
from maskmatch.mae import mae_forward, make_masking_plan
from maskmatch.model import ModelConfig, decode_full, encode_visible, init_params, lift
from maskmatch.optim import AdamW

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

config = ModelConfig(image_size=32, num_classes=4)
params = init_params(config, seed=0)
images, _, _, _ = generate_synthetic_dataset(4, 64, image_size=32, seed=3)

optimizer = AdamW(weight_decay=0.01)
rng = np.random.default_rng(0)
steps = 300
for step in range(steps):
    batch = images[rng.choice(len(images), size=16, replace=False)]
    tensors = lift(params)
    loss = mae_forward(tensors, config, batch, ratio=0.3, normalize=False,
                       rngs=np.random.default_rng((0, step)))
    loss.backward()
    grads = {k: t.grad for k, t in tensors.items()
             if t.requires_grad and t.grad is not None}
    optimizer.step(params, grads, lr=1e-3)
    if step % 50 == 0 or step == steps - 1:
        print(f"step {step:>4}  reconstruction loss {float(loss.data):.4f}")

# Visualize: mask one image, reconstruct, and compose masked/filled views.
img = images[0]
patches = patchify(img, config.patch_size)
plan = make_masking_plan(config.num_tokens, 0.3, np.random.default_rng(5))
encoded = encode_visible(params, config, patches, plan.visible)
recon = decode_full(params, config, encoded, plan.visible, plan.masked).data

masked_view = patches.copy()
masked_view[plan.masked] = 0.5  # gray out hidden tokens
filled = patches.copy()
filled[plan.masked] = np.clip(recon[plan.masked], 0.0, 1.0)

size = config.image_size
write_ppm(os.path.join(OUT, "mae_original.ppm"),
          unpatchify(patches, config.patch_size, size, size, 3))
write_ppm(os.path.join(OUT, "mae_masked.ppm"),
          unpatchify(masked_view, config.patch_size, size, size, 3))
write_ppm(os.path.join(OUT, "mae_reconstructed.ppm"),
          unpatchify(filled, config.patch_size, size, size, 3))
print(f"wrote {OUT}/mae_original.ppm, mae_masked.ppm, mae_reconstructed.ppm")
