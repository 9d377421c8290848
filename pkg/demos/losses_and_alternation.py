"""
Losses and the score-window alternation
=======================================

The pixel loss ignores the very first prediction (the network has seen
nothing yet). Adversarial training alternates between discriminator and
generator, and each phase ends when the scores leave a tolerance window.
"""

import torch
from mspn.objectives import LossWeights, discriminator_loss, generator_adv_loss, pixel_loss, total_generator_loss
from mspn.trainer import AlternationState, train_discriminator_phase

w = LossWeights(levels=2)
print("level weights:", [w.level(l) for l in range(2)], " step weights:", [w.time(t) for t in range(3)])

targets = [[torch.ones(3, 4, 4), torch.ones(3, 2, 2)] for _ in range(3)]
preds = [[torch.zeros(3, 4, 4), torch.zeros(3, 2, 2)] for _ in range(3)]
print("pixel loss:", pixel_loss(targets, preds, w).item())

real, fake = torch.tensor(0.8), torch.tensor(-0.6)
print("D loss:", discriminator_loss(real, fake).item(), " G adv:", generator_adv_loss(fake).item())
print("G total (pix=2):", total_generator_loss(torch.tensor(2.0), generator_adv_loss(fake), w).item())

# a scripted discriminator phase: the fake score falls by 0.01 per update
scores = {"fake": 1.05}

def measure(batch):
    return 1.0, scores["fake"], None

def update(ctx):
    scores["fake"] -= 0.01

state = AlternationState()
train_discriminator_phase(iter(range(1000)), measure, update, state)
sw = state.switches[-1]
print(f"discriminator phase ended after {sw['iters']} updates: fake {sw['fake']:.2f} < real {sw['real']:.2f} - c1 {sw['c1']:.2f}")
print("next phase:", state.phase)
