# Tests for the nas app
