"""Forecasting a Damped Oscillator
===============================

The damped oscillator is the reference task of *QASA*: a cosine whose amplitude decays
exponentially,

.. math::

   x(t) = A e^{-\\gamma t} \\cos(\\omega t + \\varphi),

sampled every ``dt = 0.1`` time units.
A model sees a window of ``L`` consecutive values and predicts the next one.

This guide generates the series, cuts it into windows, and trains the hybrid model at the
``tiny`` scale for a handful of epochs.
"""

import matplotlib.pyplot as plt
import numpy as np

from qasa.data import SeriesSpec, generate, make_datasets
from qasa.model import Model, instantiate_config
from qasa.train import TrainConfig, predict, train

###############################################################################
# Generating the series
# *********************
#
# Every task is a pure function of its :class:`~qasa.data.SeriesSpec`.
# The defaults reproduce ``A = 1``, ``gamma = 0.1``, ``omega = 2`` and ``phi = 0``.

spec = SeriesSpec("damped_oscillator", length=400)
series = generate(spec)

fig, ax = plt.subplots(figsize=(8, 3))
ax.plot(np.arange(spec.length) * spec.dt, series)
ax.set_xlabel("t")
ax.set_ylabel("x(t)")
plt.show()

###############################################################################
# Windows and standardization
# ***************************
#
# :func:`~qasa.data.make_datasets` cuts the series into all windows of length ``L``,
# splits them chronologically 80/20, and standardizes both parts with the mean and
# standard deviation of the training part.

config = instantiate_config("qasa", "tiny", seed=0)
train_set, val_set, stats = make_datasets(spec, config.seq_len)
print(f"{len(train_set)} training and {len(val_set)} validation windows of length {config.seq_len}")

###############################################################################
# Training
# ********
#
# The ``tiny`` hybrid model has a single circuit layer on two data qubits.
# We train it for a few epochs with the default cosine schedule.

model = Model(config)
result = train(model, (train_set, val_set), TrainConfig(lr=3e-3, epochs=8, batch_size=16))

history = [row for row in result.history if row.split == "val"]
fig, ax = plt.subplots(figsize=(8, 3))
ax.semilogy([row.epoch for row in history], [row.mse for row in history], marker="o")
ax.set_xlabel("epoch")
ax.set_ylabel("validation MSE")
plt.show()

###############################################################################
# Predictions
# ***********
#
# The checkpoint holds the parameters of the epoch with the lowest validation MSE.
# Mapping its predictions back to the units of the series shows how closely it tracks
# the oscillation.

best = result.checkpoint.to_model()
predictions = stats.inverse_transform(predict(best, val_set.inputs))
targets = stats.inverse_transform(val_set.targets)

fig, ax = plt.subplots(figsize=(8, 3))
ax.plot(val_set.window_ids, targets, label="target")
ax.plot(val_set.window_ids, predictions, label="prediction", linestyle="--")
ax.set_xlabel("window")
ax.legend()
plt.show()
