"""Shared numeric constants, defined once so tests and modules agree."""

# dB values are clamped here so perfect reconstructions stay finite.
DB_CAP = 60.0

# Epsilon inside the differentiable loss logs; chosen so the loss floor of a
# perfect reconstruction sits exactly at the -DB_CAP dB cap (1e-6 -> -60 dB).
LOSS_FLOOR_EPS = 1e-6

# Gradient checking.
FD_EPS = 1e-5
GRAD_REL_TOL = 1e-4

# CTC blank symbol id, shared by loss, decoding and conditioning.
BLANK_ID = 0

# Stop criterion: per-frame mean-square energy on peak-normalized waveforms.
ENERGY_THRESHOLD = 3e-4
MAX_CHAIN_STEPS = 6

# Exhaustive permutation search is refused above this source count.
FACTORIAL_BOUND = 6

# Synthetic corpus defaults.
SAMPLE_RATE = 8000
TOKEN_SECONDS = 0.1
NUM_TOKENS = 8          # vocabulary size excluding blank

# Training defaults.
CONDITION_NOISE_STD = 0.25
LR_INITIAL = 1e-3
LR_DECAY = 0.9
LR_DECAY_EPOCHS = 8
GRAD_CLIP_NORM = 5.0
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
