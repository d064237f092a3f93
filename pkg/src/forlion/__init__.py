"""Locally optimal designs for GLMs and multinomial logit models with mixed factors."""
