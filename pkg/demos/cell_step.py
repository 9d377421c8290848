"""
One EDLSTM step
===============

A single encoder-decoder LSTM cell: inputs and the previous hidden state go
through a skip-connected codec whose output becomes the four LSTM gates.
"""

import torch
from mspn.cell import EDLSTMCell

torch.manual_seed(0)
cell = EDLSTMCell(in_channels=6, hidden_channels=8, stages=2, code_channels=4)
state = cell.init_state(batch=1, height=16, width=16)

error = torch.rand(1, 6, 16, 16)
for t in range(3):
    pred, state, code = cell([error], state)
    print(f"t={t} prediction {tuple(pred.shape)}  |c|={state.c.abs().mean():.4f}  code {tuple(code.shape)}")

# the code sits at the bottleneck: 16 / 2**2 = 4
for name, params in cell.parameter_groups().items():
    print(f"{name:10s} {sum(p.numel() for p in params):6d} parameters")
