"""Behavioral simulator for a capacitor-reconfiguring compute-in-memory macro."""
from .array import (DEFAULT_COLS, LSB, N_ACTIVE, N_BITS, UNIT_ROWS, AnalogSample, ArrayModel, GeometryError,
                    build_array, compute_mac, compute_mac_batch, effective_bit_weights, effective_bit_weights_all,
                    ideal_mac, load_weights)
from .adc import CB_OFF, CB_ON, ConversionConfig, ConversionResult, NoiseModel, convert, ideal_quantize, sar_convert

__version__ = "0.1.0"
