"""Desk-scale DFormer RGB-D encoder-decoder on a numpy autodiff core."""
