# Pixel package - two-tap demodulator pixel simulator
