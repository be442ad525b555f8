#!/usr/bin/env python3
import uvicorn

from app.core import config

if __name__ == "__main__":
    uvicorn.run("app.main:app", host=config.HOST, port=config.PORT, reload=True)
