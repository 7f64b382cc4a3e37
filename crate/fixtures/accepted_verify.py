import openai
import pandas as pd

# 1. Data Collection
questions = ["What is the capital of France?", "What is 2+2?", 
             "Is the sky blue?", "Who wrote 'To Kill a Mockingbird'?", 
             "What is the chemical symbol for gold?"]
prompts = [(q, f"Provide a one-word answer: {q}") for q in questions]

# 2. Experiment Execution
responses = []
for p1, p2 in prompts:
    response_p1 = openai.Completion.create(
                  engine="text-davinci-002", prompt=p1, max_tokens=3
                  )
    r1 = response_p1.choices[0].text.strip()
    response_p2 = openai.Completion.create(
                  engine="text-davinci-002", prompt=p2, max_tokens=3
                  )
    r2 = response_p2.choices[0].text.strip()
    responses.append((r1, r2))

# 3. Data Analysis
successes = 0
for r1, r2 in responses:
    len_r1 = len(r1.split())
    len_r2 = len(r2.split())
    if len_r2 <= len_r1:
        successes += 1

success_rate = successes / len(questions)

# 4. Hypothesis Testing
if success_rate > 0.5:
    print("The hypothesis is supported.")
else:
    print("The hypothesis is not supported.")

# 5. Reporting
report = pd.DataFrame(responses, columns=["R1", "R2"])
report["Success"] = report.apply(
                    lambda row: len(row["R2"].split()) \
                    <= len(row["R1"].split()), axis=1
                    )
report.to_csv("report.csv")

# 6. Review and Refinement
# This part is subjective and depends on the results of the test
