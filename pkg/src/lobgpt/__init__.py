"""Generative order-flow engine: feed codec, order book, message tokenizer,
transformer world agent, discrete event simulator and stylized-facts suite."""

__version__ = "0.1.0"
