# Test suite 