# Text formatting utilities.
# Every line of this header is counted as a line of code.
"""Module docstring.

def test_not_real():
    assert False
"""


class TextFormatter:
    # Width of the target line.
    line_width = 80

    def center(self, word):  # centre a single word
        # pad on both sides
        left = (self.line_width - len(word)) // 2  # floor
        return " " * left + word  # right padding omitted
