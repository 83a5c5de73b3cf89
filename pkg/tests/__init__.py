"""
sosreach tests: unit suites per module plus command-line integration tests.
"""
