# skewflow test suite
