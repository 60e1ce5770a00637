# The examples/ corpus is reference material, not part of this test suite.
collect_ignore_glob = ["examples/*"]
