# Pixel tests package
