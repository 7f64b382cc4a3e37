...
math_questions = [
    # Add your list of mathematical questions here
    # Each question should be a tuple with two elements:
    # The first element is the non-specific version of the question
    # The second element is the specific version of the question
    # For example: ("What is 1 + 1?", "Provide the numerical answer to 1 + 1")
]
...
