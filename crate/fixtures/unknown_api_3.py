...
# Conduct the experiment
def conduct_experiment(prompts):
    responses = []
    for prompt in prompts:
        response = openai.Completion.create(engine="davinci-codex", prompt=prompt, max_tokens=5)
        responses.append(response.choices[0].text.strip())
    return responses
...
