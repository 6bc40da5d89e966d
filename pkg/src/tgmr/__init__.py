"""Multi-future trajectory prediction on grid-graph scenes.

A small trainable encoder-decoder: convolutional LSTM encoders over a
multi-scale grid graph, an attention-based spatial transformer decoder with
edge-weight memory smoothing, diverse beam search for multiple futures, and
the evaluation metrics for multimodal prediction.
"""

__version__ = "0.1.0"
