# Attention package
