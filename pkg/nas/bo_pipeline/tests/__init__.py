# Tests package for the search pipeline
