"""Encoder, decoder, trainer and analysis services."""
