"""Desk-scale attention encoder-decoder speech recognition.

A from-scratch sequence-to-sequence recognizer: minimal autodiff tensor core,
bidirectional LSTM encoder with frame subsampling, four attention mechanisms
(dot-product, additive, location-aware, coverage), single- and multi-head
decoders with output-level head fusion, AdaDelta training, and beam-search
decoding with character-error-rate evaluation on synthetic transduction
tasks.
"""

__version__ = "0.1.0"
