# Tests for the conditional node-selection library
