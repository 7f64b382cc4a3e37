...
# Initialize the LLM
llm = openai.LanguageModel()
...
