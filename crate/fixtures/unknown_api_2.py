...
from openai import GPT3
...
