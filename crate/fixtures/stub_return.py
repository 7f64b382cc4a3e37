...
def ask_llm(question):
    return "Placeholder response"

general_responses = [ask_llm(q) for q in general_questions]
specific_responses = [ask_llm(q) for q in specific_questions]
...
