"""Offline stand-in for the openai package, enough for generated scripts."""

import os

api_key = os.environ.get("OPENAI_API_KEY")


class _Obj:
    def __init__(self, **kw):
        self.__dict__.update(kw)


def _answer(prompt):
    if prompt.lower().startswith("provide a one-word answer"):
        return " Four" if "2+2" in prompt else " Yes"
    return " Sure, here is a detailed answer to your question."


class Completion:
    @staticmethod
    def create(engine=None, prompt="", max_tokens=16, **kwargs):
        words = _answer(prompt).split()[: max(1, max_tokens)]
        return _Obj(choices=[_Obj(text=" " + " ".join(words))])


class ChatCompletion:
    @staticmethod
    def create(model=None, messages=(), **kwargs):
        prompt = messages[-1]["content"] if messages else ""
        return _Obj(choices=[_Obj(message=_Obj(content=_answer(prompt).strip()))])
