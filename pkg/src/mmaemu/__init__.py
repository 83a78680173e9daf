"""Bit-accurate emulation of GPU matrix multiply-add units."""
