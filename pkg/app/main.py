from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.api import chains
from app.core.logging import setup_logging

setup_logging()

app = FastAPI(
    title="Matrix Chain Compiler API",
    description="Maps generalized matrix chains to cost-minimal sequences of kernel calls.",
    version="1.0.0",
)

# Add CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include routers
app.include_router(chains.router)


@app.get("/")
async def root():
    return {"message": "Welcome to Matrix Chain Compiler API"}
