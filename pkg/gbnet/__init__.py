"""Training networks with gradient-boosting output heads, and tools to study them."""
