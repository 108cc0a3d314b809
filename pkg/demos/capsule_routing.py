# # Routing by agreement, one iteration at a time
#
# Lower-level capsules vote for higher-level ones. A vote that agrees with
# the emerging consensus gains weight on the next pass. Here three input
# capsules all predict the same vector for output 0 and scatter their
# votes for output 1.

# In[1]:

import torch

from cevae.capsules import CapsuleClustering, collapse, route, squash

torch.manual_seed(0)

# Squash keeps direction and maps length into [0, 1).

# In[2]:

for r in (0.0, 1.0, 3.0, 10.0):
    print(f"|s| = {r:4.1f}  ->  |squash(s)| = {squash(torch.tensor([r, 0.0])).norm():.4f}")

# Predictions have shape (batch, outputs, inputs, dim, H, W).

# In[3]:

u_hat = torch.randn(1, 2, 3, 4, 1, 1) * 0.3
u_hat[0, 0] = torch.tensor([1.0, -0.5, 0.25, 0.0]).view(1, 4, 1, 1)

state, v = route(u_hat, iterations=4, record_history=True)
for k, (c, b) in enumerate(state.history, 1):
    print(f"iteration {k}: coupling of each input to output 0 = {c[0, :, 0, 0, 0].tolist()}")

# The consensus output is longer (more "present") than the noisy one.

# In[4]:

print("output lengths:", v.norm(dim=2)[0, :, 0, 0].tolist())

# The collapsed capsules weight every vote by its final coupling.

# In[5]:

print("collapsed shape:", tuple(collapse(u_hat, state).shape))

# At full size the module turns a 256x16x16 latent into 32x16 primary
# capsules on a 9x9 grid, routes them to 64 capsules of dimension 32, and
# projects the entity-presence map back to 256x16x16.

# In[6]:

module = CapsuleClustering().eval()
with torch.no_grad():
    out = module.run(torch.randn(1, 256, 16, 16))
for name in ("primary", "predictions", "collapsed", "presence", "capsule_vectors"):
    print(f"{name:16s} {tuple(getattr(out, name).shape)}")
