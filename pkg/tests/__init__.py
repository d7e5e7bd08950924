# Tests for staci
