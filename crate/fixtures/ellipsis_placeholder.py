...
general_prompts = [...]  # Replace with your general prompts
specific_prompts = [...]  # Replace with your specific prompts
...
